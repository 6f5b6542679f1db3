fn main() {
    std::process::exit(twofold::cli::main_from(std::env::args_os()));
}
