fn main() {
    std::process::exit(thor_cli::main_with(std::env::args_os()));
}
