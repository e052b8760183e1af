fn main() {
    std::process::exit(chantwin::cli::dispatch(std::env::args_os()));
}
