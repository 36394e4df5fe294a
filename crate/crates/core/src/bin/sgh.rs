fn main() {
    std::process::exit(graph_harness::cli::main_with(std::env::args_os()));
}
