fn main() {
    std::process::exit(defakehop::cli::main_with_args(std::env::args_os()));
}
