fn main() {
    std::process::exit(boneforge_cli::run(std::env::args_os()));
}
