fn main() {
    std::process::exit(rtmdid::run(std::env::args_os()));
}
