fn main() {
    std::process::exit(cloudsquat::run_cli(std::env::args_os()));
}
