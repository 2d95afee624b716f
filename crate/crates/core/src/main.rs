fn main() {
    std::process::exit(slotfill::cli::main());
}
