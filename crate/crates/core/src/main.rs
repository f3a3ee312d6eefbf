fn main() {
    std::process::exit(sle_lab::cli::run());
}
