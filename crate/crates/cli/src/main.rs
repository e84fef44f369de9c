use std::io;

fn main() {
    let stdin = io::stdin();
    let code = aegis_cli::run(
        std::env::args_os(),
        aegis_cli::Io {
            stdin: &mut stdin.lock(),
            stdout: &mut io::stdout().lock(),
            stderr: &mut io::stderr().lock(),
        },
    );
    std::process::exit(code);
}
