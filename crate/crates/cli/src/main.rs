fn main() {
    std::process::exit(choicekit_cli::run(std::env::args_os()));
}
