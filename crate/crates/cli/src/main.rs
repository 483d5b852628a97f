fn main() {
    std::process::exit(shs_safe::run(std::env::args_os()));
}
