fn main() {
    std::process::exit(policy_eval::cli::main_with_args(std::env::args_os()));
}
