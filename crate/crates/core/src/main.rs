fn main() {
    std::process::exit(bpire::runner::main_with_args(std::env::args_os()));
}
