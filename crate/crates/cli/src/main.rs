fn main() {
    std::process::exit(bat_cli::run_command(std::env::args_os()));
}
