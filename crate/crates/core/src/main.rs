fn main() {
    std::process::exit(instructseq::cli::main_with_args(std::env::args_os()));
}
