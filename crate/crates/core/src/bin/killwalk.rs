fn main() {
    std::process::exit(killwalk::cli::run(std::env::args_os()));
}
