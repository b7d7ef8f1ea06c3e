fn main() {
    std::process::exit(lcpo_lab::cli::run(std::env::args_os()));
}
