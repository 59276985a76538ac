from src.presentation.presentation_designer import ChartDesigner
