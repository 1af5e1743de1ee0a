fn main() {
    std::process::exit(basin::cli_main());
}
