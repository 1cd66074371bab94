fn main() {
    let code = bootflow_cli::run(std::env::args_os());
    std::process::exit(code);
}
