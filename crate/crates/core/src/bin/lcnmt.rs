fn main() {
    std::process::exit(lcnmt::cli::run(std::env::args_os()));
}
