fn main() {
    std::process::exit(kdrsdl::cli::run(std::env::args_os()));
}
