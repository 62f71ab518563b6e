fn main() {
    std::process::exit(mmqueue::harness::run());
}
