fn main() {
    let code = wanda_core::cli::run(std::env::args_os());
    std::process::exit(code);
}
