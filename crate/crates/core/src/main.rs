fn main() {
    std::process::exit(cqa_detect::cli::run(std::env::args_os()));
}
