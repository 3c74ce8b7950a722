use std::process::ExitCode;

fn main() -> ExitCode {
    vqa_implications::cli::main()
}
