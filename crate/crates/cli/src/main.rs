fn main() {
    std::process::exit(redi_cli::main_with_args(std::env::args_os()));
}
