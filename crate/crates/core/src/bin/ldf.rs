fn main() {
    std::process::exit(ldf::report::cli_main(std::env::args_os()));
}
