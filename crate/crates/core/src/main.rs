fn main() {
    std::process::exit(orient8::cli::run(std::env::args_os()));
}
