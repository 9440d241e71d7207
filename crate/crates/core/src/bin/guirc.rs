fn main() {
    std::process::exit(guirc::cli::run(std::env::args_os()));
}
