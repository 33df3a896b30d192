fn main() {
    std::process::exit(cqed_entangle::interface::cli_main(std::env::args_os()));
}
