fn main() {
    std::process::exit(atlas_cli::run(std::env::args_os()));
}
