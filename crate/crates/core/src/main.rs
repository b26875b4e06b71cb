fn main() {
    std::process::exit(mmrs::cli::main_with(std::env::args_os()));
}
