fn main() {
    std::process::exit(docmt_cli::run(std::env::args_os()));
}
