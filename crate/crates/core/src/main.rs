fn main() {
    std::process::exit(mkv_lab::cli::run(std::env::args_os()));
}
