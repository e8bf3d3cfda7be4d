fn main() {
    std::process::exit(polymer_cli::run(std::env::args_os()));
}
