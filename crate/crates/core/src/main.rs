use std::process::ExitCode;

fn main() -> ExitCode {
    framepress::cli::main()
}
