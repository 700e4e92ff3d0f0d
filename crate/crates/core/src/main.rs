fn main() {
    std::process::exit(selforget::harness::cli(std::env::args_os()));
}
