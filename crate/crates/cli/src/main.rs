fn main() {
    std::process::exit(scriptorium_cli::main_with(std::env::args_os()));
}
