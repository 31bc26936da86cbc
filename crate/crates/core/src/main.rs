fn main() {
    std::process::exit(landmark_retrieval::cli::cli_main(std::env::args_os()));
}
