fn main() {
    melmask::cli::main_entry();
}
