fn main() {
    std::process::exit(dualformer_cli::run(std::env::args_os()));
}
