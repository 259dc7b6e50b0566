fn main() {
    println!("{}", cfmec_harness::campaign::crate_name());
}
