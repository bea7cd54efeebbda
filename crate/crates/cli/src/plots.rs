//! Optional matplotlib scripts next to the CSVs. Plotting is not part of
//! the tool itself; the scripts only read the bundle.

use crate::output::Bundle;
use crate::{CliError, Command};

const HEAD: &str = "import csv\nimport matplotlib.pyplot as plt\n\n\ndef load(name):\n    with open(name) as f:\n        rows = list(csv.reader(f))\n    head, body = rows[0], rows[1:]\n    return head, [[float(x) for x in r] for r in body]\n\n\n";

pub fn write(cmd: Command, bundle: &mut Bundle) -> Result<(), CliError> {
    let body = match cmd {
        Command::Synth => "head, rows = load(\"gain.csv\")\nplt.bar(range(len(head)), rows[0], tick_label=head)\nplt.ylabel(\"gain\")\n",
        Command::Sweep => "head, rows = load(\"sweep.csv\")\nplt.plot([r[0] for r in rows], [r[1] for r in rows], \"o-\")\nplt.xlabel(\"N\")\nplt.ylabel(\"gamma_min\")\n",
        Command::Residue => "head, rows = load(\"residue.csv\")\nplt.semilogy([r[0] for r in rows], [r[3] for r in rows], \"o\")\nplt.xlabel(\"n\")\nplt.ylabel(\"rho_n\")\n",
        Command::Sim => "head, rows = load(\"costs.csv\")\nt = [r[0] for r in rows]\nfor j, name in enumerate(head[1:-2], start=1):\n    plt.plot(t, [r[j] for r in rows], label=name)\nplt.axhline(0.0, color=\"k\", lw=0.5)\nplt.xlabel(\"t\")\nplt.legend()\n",
    };
    let script = format!("{HEAD}{body}plt.savefig(\"{}.png\")\n", cmd.name());
    bundle.write(&format!("plot_{}.py", cmd.name()), &script)
}
