fn main() {
    std::process::exit(osal_cli::main_with_args(std::env::args_os()));
}
