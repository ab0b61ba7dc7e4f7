fn main() {
    std::process::exit(lgtd::cli::main_entry());
}
