# modules/pdf_export.py

import io
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import (
    Image,
    Paragraph,
    SimpleDocTemplate,
    Spacer,
    Table,
    TableStyle,
)

from utils.constants import APP_NAME, APP_VERSION
from utils.formatting import format_degrees, format_kwh, format_meters, format_percentage, format_seconds

logger = logging.getLogger(__name__)

HEADER_COLOR = "#208090"


def _table_style(align: str = "LEFT") -> TableStyle:
    return TableStyle(
        [
            ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor(HEADER_COLOR)),
            ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
            ("ALIGN", (0, 0), (-1, -1), align),
            ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
            ("FONTSIZE", (0, 0), (-1, 0), 10),
            ("BOTTOMPADDING", (0, 0), (-1, 0), 8),
            ("BACKGROUND", (0, 1), (-1, -1), colors.beige),
            ("GRID", (0, 0), (-1, -1), 1, colors.black),
            ("FONTSIZE", (0, 1), (-1, -1), 9),
            ("ROWBACKGROUNDS", (0, 1), (-1, -1), [colors.white, colors.HexColor("#f5f5f5")]),
        ]
    )


def _metric_rows(metrics: dict) -> list:
    return [
        ["Metric", "Value"],
        ["Overall MAE", format_meters(metrics.get("overall_mae_m"))],
        ["Building MAE", format_meters(metrics.get("building_mae_m"))],
        ["Pitch error", format_degrees(metrics.get("pitch_error_deg"))],
        ["Azimuth error", format_degrees(metrics.get("azimuth_error_deg"))],
        ["Segment IoU", format_percentage(metrics.get("segment_iou_fraction"))],
        ["MAPE", format_percentage(metrics.get("mape_fraction"))],
        ["MAPE@5kW", format_percentage(metrics.get("mape_at_5kw_fraction"))],
    ]


def generate_run_pdf(manifest, hillshade_path: Optional[str] = None) -> io.BytesIO:
    """
    Generate a PDF summary of a pipeline run.

    Args:
        manifest: RunManifest of the run
        hillshade_path: optional PNG shown under the summary

    Returns:
        BytesIO object with PDF content
    """
    pdf_buffer = io.BytesIO()

    doc = SimpleDocTemplate(
        pdf_buffer,
        pagesize=A4,
        rightMargin=0.5 * inch,
        leftMargin=0.5 * inch,
        topMargin=0.5 * inch,
        bottomMargin=0.75 * inch,
        title=f"Run report - {manifest.run_id}",
    )

    elements: list = []
    styles = getSampleStyleSheet()

    title_style = ParagraphStyle(
        "CustomTitle",
        parent=styles["Heading1"],
        fontSize=22,
        textColor=colors.HexColor(HEADER_COLOR),
        spaceAfter=6,
        alignment=TA_CENTER,
        fontName="Helvetica-Bold",
    )

    heading_style = ParagraphStyle(
        "CustomHeading",
        parent=styles["Heading2"],
        fontSize=14,
        textColor=colors.HexColor(HEADER_COLOR),
        spaceAfter=8,
        fontName="Helvetica-Bold",
    )

    normal_style = ParagraphStyle(
        "CustomNormal",
        parent=styles["Normal"],
        fontSize=10,
        spaceAfter=6,
        leading=12,
    )

    # ----- Title -----
    elements.append(Paragraph("Rooftop Solar Run Report", title_style))
    elements.append(Spacer(1, 0.15 * inch))
    elements.append(Paragraph(f"Run ID: {manifest.run_id}", normal_style))
    elements.append(Paragraph(f"Status: {manifest.status}", normal_style))
    elements.append(Paragraph(f"Output directory: {manifest.output_dir}", normal_style))
    elements.append(Spacer(1, 0.15 * inch))

    # ----- Summary -----
    elements.append(Paragraph("Summary", heading_style))
    summary = manifest.summary
    summary_rows = [
        ["Quantity", "Value"],
        ["Buildings", str(summary.get("building_count", 0))],
        ["Roof segments", str(summary.get("segment_count", 0))],
        ["Panels placed", str(summary.get("panel_count", 0))],
        ["Annual energy (all panels)", format_kwh(summary.get("total_energy_kwh"))],
        ["Annual energy (5 kW per building)", format_kwh(summary.get("total_energy_5kw_kwh"))],
        ["Occluded pixels", format_percentage(summary.get("occluded_fraction"))],
        ["Wall time", format_seconds(manifest.wall_time_s)],
    ]
    summary_table = Table(summary_rows, colWidths=[3.0 * inch, 2.5 * inch])
    summary_table.setStyle(_table_style())
    elements.append(summary_table)
    elements.append(Spacer(1, 0.2 * inch))

    # ----- Stage timings -----
    elements.append(Paragraph("Stage Timings", heading_style))
    timing_rows = [["Stage", "Wall time"]]
    timing_rows += [[stage, format_seconds(seconds)] for stage, seconds in manifest.timings.items()]
    timing_table = Table(timing_rows, colWidths=[3.0 * inch, 2.5 * inch])
    timing_table.setStyle(_table_style())
    elements.append(timing_table)
    elements.append(Spacer(1, 0.2 * inch))

    # ----- Metrics -----
    if manifest.metrics:
        elements.append(Paragraph("Evaluation", heading_style))
        metric_table = Table(_metric_rows(manifest.metrics), colWidths=[3.0 * inch, 2.5 * inch])
        metric_table.setStyle(_table_style())
        elements.append(metric_table)
        elements.append(Spacer(1, 0.2 * inch))

    # ----- Hillshade -----
    if hillshade_path and Path(hillshade_path).exists():
        elements.append(Paragraph("Hillshade", heading_style))
        elements.append(Image(str(hillshade_path), width=4.0 * inch, height=4.0 * inch, kind="proportional"))
        elements.append(Spacer(1, 0.2 * inch))

    # ----- Warnings -----
    if manifest.warnings:
        elements.append(Paragraph("Warnings", heading_style))
        for warning in manifest.warnings:
            elements.append(Paragraph(warning, normal_style))

    doc.build(elements, onFirstPage=add_footer, onLaterPages=add_footer)
    pdf_buffer.seek(0)
    logger.info("Generated PDF for run %s", manifest.run_id)
    return pdf_buffer


def add_footer(canvas, doc) -> None:
    """Add footer to each page."""
    canvas.saveState()
    timestamp = datetime.now().strftime("%B %d, %Y at %H:%M")

    footer_text = f"Generated on {timestamp} | {APP_NAME} {APP_VERSION} | annual energy from clear-sky flux"

    canvas.setFont("Helvetica", 8)
    canvas.setFillColor(colors.grey)
    canvas.drawCentredString(4.25 * inch, 0.4 * inch, footer_text)
    canvas.restoreState()
