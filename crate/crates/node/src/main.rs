fn main() {
    std::process::exit(vnode::cli::run(std::env::args_os()));
}
