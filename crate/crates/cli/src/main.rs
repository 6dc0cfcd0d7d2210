fn main() {
    std::process::exit(rofdecide_cli::run(std::env::args_os()));
}
