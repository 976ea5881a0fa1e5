fn main() {
    std::process::exit(kglm::cli::run(std::env::args_os()));
}
