fn main() {
    std::process::exit(gnelf_cli::run(std::env::args_os()));
}
