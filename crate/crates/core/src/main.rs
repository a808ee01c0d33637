fn main() {
    std::process::exit(ecgkit::pipeline::run(std::env::args_os()));
}
