fn main() {
    std::process::exit(krasovskii::cli::run(std::env::args_os()) as i32);
}
