fn main() {
    std::process::exit(mel_enhance::cli::main_with(std::env::args_os()));
}
