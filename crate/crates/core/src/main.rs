fn main() {
    std::process::exit(sparse_fca::bench::cli::main_with(std::env::args_os()));
}
