fn main() {
    let code = vgchaos::cli::main_with_args(std::env::args().collect(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
