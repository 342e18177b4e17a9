fn main() {
    std::process::exit(htil::run(std::env::args_os()));
}
