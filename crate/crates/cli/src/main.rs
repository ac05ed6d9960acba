fn main() {
    std::process::exit(halosim_cli::execute(std::env::args_os()));
}
