fn main() {
    std::process::exit(continual_traj::cli::main_with_args(std::env::args_os()));
}
