fn main() {
    if let Err(e) = ddsr_cli::run(std::env::args_os()) {
        eprintln!("ddsr: {e}");
        std::process::exit(e.exit_code());
    }
}
