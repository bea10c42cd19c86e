fn main() { std::process::exit(pqc2::cli::main()) }
